# Import all aggregators to register them
from . import cbp, vanilla, weighted
