// Similarity model for the process-level cases: absolute distance on the
// nozzle temperature, a handcrafted analysis for the pressure. The
// `pressureExpert` plugin must be registered with the runtime before
// retrieval uses this model.
similarity ProcessSimilarity {
  import InjectionMolding;

  local ProcessData.nozzleTemperature absolute;
  local ProcessData.pressure manual pressureExpert;

  global weighted {
    ProcessData.nozzleTemperature weight 0.6;
    ProcessData.pressure weight 0.4;
  }
}
