# run.py
# Main entry point for the toolkit.
# To run: `python run.py govern --quick` or `python -m app govern --quick`

from dotenv import load_dotenv

load_dotenv()

from app.cli import main  # noqa: E402

if __name__ == '__main__':
    main()
