"""
View-direction prompt suffixes appended to object prompts.

Azimuth 0 is the front of the object; azimuths are measured in degrees around +y.
"""

FRONT = 'front view'
SIDE = 'side view'
BACK = 'back view'
OVERHEAD = 'overhead view'

# Above this elevation the camera is looking down on the object
OVERHEAD_ELEVATION = 60.0

# Azimuth half-widths (degrees) of the front and back sectors; the rest is side
FRONT_HALF_WIDTH = 45.0
BACK_HALF_WIDTH = 45.0
