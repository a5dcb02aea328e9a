"""scenekit: deterministic core of a modular single-view indoor 3D
reconstruction pipeline.

Neural stages (inpainting, defurnishing, image-to-3D, depth estimation) are
consumed as file-based oracle inputs through the ``backend`` protocol; this
package owns everything deterministic around them: mask fusion, depth
alignment, amodal mask construction, scene composition and evaluation.
"""

__version__ = "0.1.0"
