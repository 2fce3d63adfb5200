"""
.. include:: ../README.md
"""

__version__ = "0.3.0"

NODE_KINDS = [
    'anchor',           # node bound to a concrete KG entity
    'variable',         # existentially quantified intermediate node
    'target']           # the entity of interest (single sink)

DIRECTIONS = [
    'out',              # facts whose head is the entity
    'in']               # facts whose tail is the entity

ATTACK_MODES = [
    'forcing',          # drive every target query to a chosen answer a*
    'degradation']      # push target queries away from their ground truth

ATTACK_VARIANTS = [
    'none',             # no attack, baseline evaluation only
    'kp',               # knowledge poisoning (facts injected into the KG)
    'qm',               # query misguiding (bait evidence attached to queries)
    'co']               # interleaved co-optimization of kp and qm

DEFENSES = [
    'none',             # no countermeasure
    'filter',           # remove the m% facts with the lowest fitness
    'advtrain']         # train on adversarially misguided queries

REPORT_FORMATS = [
    'json',             # full report, round-trips to an equal Report
    'csv',              # one row per (phase, metric, k, group)
    'markdown']         # tables with the after(delta arrow) cell convention

PROFILES = [
    'desk',             # small synthetic KG, d=64, L=2, 10k steps
    'full']             # published default parameters (d=300, L=4, 50k steps)

from .exceptions import *
from .utils import *
from .kg import *
from .query import *
from .dataloader import *
from .models import *
from .losses import *
from .training import *
from .inference import *
from .metrics import *
from .attacks import *
from .defense import *
from .config import *
from .experiment import *
