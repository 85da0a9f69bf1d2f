"""Safe kinodynamic planning for a quadrotor: RRT*, LQR tracking and a predictive safety filter."""
