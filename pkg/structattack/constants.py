# The MIT License (MIT)
# Copyright © 2024 structattack contributors

# Training defaults
EPSILON_TRAIN = 10  # 8-bit pixel units
LAMBDA_DISTILL = 0.7
TAU = 0.6
ETA = 0.999
EARLY_BLOCKS = (1, 2)
LEARNING_RATE = 2e-4
ADAM_BETAS = (0.5, 0.99)
BATCH_SIZE = 16
EPOCHS = 1
SEED = 0

# Surrogate defaults
SURROGATE_ID = "vgg16"
SURROGATE_LAYER = 16  # third max-pool of torchvision vgg16.features

# Generator defaults
BASE_WIDTH = 64
NUM_RESIDUAL_BLOCKS = 6
UNET_DEPTH = 4
RESNET_DOWNSAMPLING = 4
UNET_DOWNSAMPLING = 2**UNET_DEPTH

# Data pipeline
RESIZE_SHORTER = 256
CROP_SIZE = 224
CROSS_DOMAIN_RESOLUTION = 448
IMAGE_EXTENSIONS = (".jpg", ".jpeg", ".png", ".bmp", ".ppm", ".webp", ".tif", ".tiff")

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

# Evaluation
EPSILON_SWEEP = (2, 4, 6, 8, 10, 16)
BDR_BITS = 4
JPEG_QUALITY = 75
RP_SCALE_LOW = 0.9
RP_SCALE_HIGH = 1.1

# Numerics
COSINE_EPS = 1e-12

# Exit codes
EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_DATA_ERROR = 3
EXIT_RUNTIME_ERROR = 4

# Checkpoint archive
CHECKPOINT_FORMAT_VERSION = "1.0.0"
STUDENT_NAMESPACE = "student"
TEACHER_NAMESPACE = "teacher"

CACHE_ENV_VAR = "STRUCTATTACK_CACHE"
