from .optimizers import *
from .base import *
from .supervised import *
