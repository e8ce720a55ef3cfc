from dotenv import load_dotenv
import os

load_dotenv()

TOOL_NAME = "frailtyfit"
TOOL_VERSION = "0.1.0"

LOG_LEVEL = os.getenv("FRAILTY_LOG_LEVEL", "INFO")

# default for every --workers flag
WORKERS = int(os.getenv("FRAILTY_WORKERS", "1"))

OUTPUT_DIR = os.getenv("FRAILTY_OUTPUT_DIR", "data")
RAW_DATA_DIR = os.getenv("FRAILTY_RAW_DATA_DIR", os.path.join("data", "raw"))

DRS_URL = os.getenv(
    "FRAILTY_DRS_URL",
    "https://vincentarelbundock.github.io/Rdatasets/csv/frailtySurv/drs.csv",
)
HDFAIL_URL = os.getenv(
    "FRAILTY_HDFAIL_URL",
    "https://vincentarelbundock.github.io/Rdatasets/csv/frailtySurv/hdfail.csv",
)

API_HOST = os.getenv("FRAILTY_API_HOST", "127.0.0.1")
API_PORT = int(os.getenv("FRAILTY_API_PORT", "8000"))

SLOW_TESTS = os.getenv("FRAILTY_RUN_SLOW", "") not in ("", "0", "false", "False")
