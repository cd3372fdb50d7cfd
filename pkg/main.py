import sys
from dotenv import load_dotenv

# Load environment variables from .env file before Config is read
load_dotenv()

from app.config import Config
from app.cli.commands import dispatch

# Ensure directories exist
Config.ensure_directories()

if __name__ == "__main__":
    sys.exit(dispatch())
