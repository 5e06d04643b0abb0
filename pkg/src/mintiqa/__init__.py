"""Multi-perspective quality assessment toolkit for text-to-image outputs.

Submodules:

- ``tensor``: float64 reverse-mode autodiff kernel with gradient checking.
- ``study``: subjective-study processing (z-scores, outlier screening, MOS).
- ``metrics``: rank correlations, preference accuracy, QA-accuracy scoring.
- ``dataset``: manifest schema, ingestion, splits and QA-pair templates.
- ``segmentation``: prompt decomposition into style/content/atmosphere.
- ``model``: toy cross-modal scorer with an instruction-following branch.
- ``training``: three-stage training driver.
- ``checkpoint``: flat binary parameter archives.
- ``cli`` / ``server``: command-line front end and annotation server.
"""

__version__ = "0.1.0"
