import logging
from parapot import create_app
from dotenv import load_dotenv

load_dotenv()

app = create_app()

if __name__ == "__main__":
    logging.info("parapot CLI started")
    app()
