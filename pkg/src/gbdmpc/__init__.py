"""Generalized Benders decomposition for hybrid MPC with cut storage across solves."""
