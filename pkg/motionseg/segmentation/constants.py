"""
Constants for the motionseg segmentation app.
Central location for tunables shared by the pipeline stages and commands.
"""

# Cue containers
FLO_MAGIC = 202021.25  # Middlebury .flo tag
MANIFEST_VERSION = 1
DEPTH_PNG_SCALE = 1.0  # depth value a 16-bit PNG sample of 65535 stands for
Q_MIN = 1e-6  # inverse-depth clamp floor
Q_MAX = 1e6  # inverse-depth clamp ceiling
DEPTH_CONVENTIONS = ('depth', 'inverse_depth')

# Proposal filtering
IOU_THRESHOLD = 0.5
MAX_AREA_FRACTION = 0.5
MIN_PIXELS = 50  # per frame, for a track to count as visible

# Motion model fitting
MODEL_LINEAR_DEPTH = 'linear-depth'
MODEL_LINEAR_DEPTH_PRINTED = 'linear-depth-printed'
MODEL_QUADRATIC = 'quadratic'
MOTION_MODELS = (MODEL_LINEAR_DEPTH, MODEL_LINEAR_DEPTH_PRINTED, MODEL_QUADRATIC)
MAX_SAMPLES = 5000  # per object per frame pair
FIT_QUORUM = 16  # minimum pixels to fit
RIDGE_FACTOR = 1e-8
RANK_TOLERANCE = 1e-10  # relative singular value cutoff on equilibrated columns

# Affinity
ORK_FRACTION = 0.25
RESIDUAL_FLOOR = 1e-12  # residuals at or below this are exact fits and tie

# Clustering
KMEANS_RESTARTS = 10
KMEANS_MAX_ITER = 100

# Ablation modes
ABLATION_FULL = 'full'
ABLATION_FLOW_ONLY = 'flow-only'
ABLATION_PROPOSALS = 'proposals-baseline'
ABLATION_MODES = (ABLATION_FULL, ABLATION_FLOW_ONLY, ABLATION_PROPOSALS)

# Simulator
DEFAULT_FOCAL = 1.0  # normalized-coordinate units
DEFAULT_IMAGE_SIZE = 64
DEFAULT_FRAME_COUNT = 4
MAX_PRESET_FLOW_PX = 3.0
PRESETS = ('parallax-trap', 'parallax-static', 'two-movers', 'rotor', 'shared-motion')

# Output
UNASSIGNED_LABEL = 0
DEFAULT_SEED = 0
THREADS = 1
SEGMENTATION_FILE = 'segmentation.yaml'  # metadata next to per-frame label PNGs
GROUNDTRUTH_FILE = 'groundtruth.yaml'
