# tests/services/__init__.py
# Service tests: engine, models, estimators, control, governance, export
