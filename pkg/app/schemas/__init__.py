# app/schemas/__init__.py
# pydantic models for targets, bank models, risk, control and governance
