# MAStools
from .version import *

COPYRIGHT = '''Copyright (C)2024, MAStools authors. GNU GPL v3 applies.
This free software trains and evaluates mutual-attention siamese change detectors WITH ABSOLUTELY NO WARRANTY!'''
