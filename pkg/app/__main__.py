# app/__main__.py
# `python -m app <subcommand>`

from dotenv import load_dotenv

from app.cli import main

load_dotenv()
main()
