"""Fundamental sensing-and-communication tradeoff curves for ISAC systems.

Submodules:
    numerics        shared kernels (eigendecomposition, water-filling, Haar
                    sampling, Gaussian tail, seeded streams)
    channels        steering vectors, point-target channels, SNR conventions
    rate_exponent   rate / detection-error-exponent region sweeps
    cap_distortion  capacity-distortion boundary via a two-cost fixed point
    crb_rate        CRB-rate corner points (Fisher-information affine maps)
    elmmse          ergodic LMMSE channel estimation and precoder designs
    ranging_zzb     delay CRB / Ziv-Zakai bound and PSD optimization
    cli             reproducible sweep runner (CSV/JSON emission)
"""

__version__ = "0.1.0"
