# Simulator-in-the-Loop Vehicle State Estimation - Source Package
