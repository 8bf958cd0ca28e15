# app/services/__init__.py
# Simulation, estimation, control and governance services
