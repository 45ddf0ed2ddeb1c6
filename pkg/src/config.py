import os
from pathlib import Path
from dotenv import load_dotenv

load_dotenv()

# Base directory
BASE_DIR = Path(__file__).parent.parent
OUTPUT_DIR = Path(os.getenv('SHAPEOPT_OUTPUT_DIR', BASE_DIR / "output"))

# Flow solver defaults (pressure-velocity iteration)
FLOW_TOLERANCE = float(os.getenv('FLOW_TOLERANCE', '1e-8'))
FLOW_MAX_ITERATIONS = int(os.getenv('FLOW_MAX_ITERATIONS', '3000'))
FLOW_RELAX_VELOCITY = float(os.getenv('FLOW_RELAX_VELOCITY', '0.7'))
FLOW_RELAX_PRESSURE = float(os.getenv('FLOW_RELAX_PRESSURE', '0.3'))
OBJECTIVE_AVERAGE_WINDOW = int(os.getenv('OBJECTIVE_AVERAGE_WINDOW', '50'))

# Descent (p-Laplacian) defaults
DESCENT_P_SEQUENCE = tuple(float(p) for p in os.getenv('DESCENT_P_SEQUENCE', '2,2.3,2.6').split(','))
DESCENT_TOLERANCE = float(os.getenv('DESCENT_TOLERANCE', '1e-9'))
DESCENT_TAU = float(os.getenv('DESCENT_TAU', '10'))
DESCENT_RELAX = float(os.getenv('DESCENT_RELAX', '1.0'))
DESCENT_EPS_REG = float(os.getenv('DESCENT_EPS_REG', '1e-10'))
DESCENT_MAX_PICARD_ITERS = int(os.getenv('DESCENT_MAX_PICARD_ITERS', '500'))

# Optimizer defaults
OPT_MAX_OUTER_ITERATIONS = int(os.getenv('OPT_MAX_OUTER_ITERATIONS', '20'))
OPT_STEP_FRACTION = float(os.getenv('OPT_STEP_FRACTION', '0.2'))
OPT_BACKTRACK_FACTOR = float(os.getenv('OPT_BACKTRACK_FACTOR', '0.5'))
OPT_MAX_BACKTRACKS = int(os.getenv('OPT_MAX_BACKTRACKS', '8'))
OPT_CONSTRAINT_TOLERANCE = float(os.getenv('OPT_CONSTRAINT_TOLERANCE', '1e-3'))

# Logging
LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')
LOG_DIR = Path(os.getenv('SHAPEOPT_LOG_DIR', BASE_DIR / "logs"))
LOG_DIR.mkdir(parents=True, exist_ok=True)
LOG_FILE = LOG_DIR / "shapeopt.log"
