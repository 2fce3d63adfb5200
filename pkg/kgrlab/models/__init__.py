from .blocks import *
from .kgr import *
