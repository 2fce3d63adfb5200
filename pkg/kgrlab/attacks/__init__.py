from .base import *
from .kp import *
from .qm import *
from .co import *
