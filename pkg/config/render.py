"""
Renderer constants.
"""

# Added to the diagonal of every projected covariance (pixels²)
COV2D_INFLATION = 0.3

# Gaussians contribute only inside this many standard deviations of their 2D mean
SIGMA_CUTOFF = 3.0

# A pixel stops blending once transmittance falls below this
TRANSMITTANCE_FLOOR = 1e-4

# Pixels per tile side for the tiled rasterizer
TILE_SIZE = 16

# Projected covariances with a smaller determinant are treated as degenerate
MIN_COV2D_DETERMINANT = 1e-12


def get_render_config() -> dict:
    return {
        'cov2d_inflation': COV2D_INFLATION,
        'sigma_cutoff': SIGMA_CUTOFF,
        'transmittance_floor': TRANSMITTANCE_FLOOR,
        'tile_size': TILE_SIZE,
    }
