// Similarity model for the filling study.
//
// backPressure and dosingTime react sensitively to changes, so their local
// distances are squared; the remaining parameters use the absolute
// distance. switchOverVolume dominates the weighted combination (0.4),
// cylinderHeating barely matters (0.05).
similarity FillingStudy {
  import InjectionMolding;

  local PhaseData.backPressure squared;
  local PhaseData.cylinderHeating absolute;
  local PhaseData.dosingTime squared;
  local PhaseData.injectionFlow absolute;
  local PhaseData.switchOverVolume absolute;

  global weighted {
    PhaseData.backPressure weight 0.2;
    PhaseData.cylinderHeating weight 0.05;
    PhaseData.dosingTime weight 0.2;
    PhaseData.injectionFlow weight 0.15;
    PhaseData.switchOverVolume weight 0.4;
  }
}
