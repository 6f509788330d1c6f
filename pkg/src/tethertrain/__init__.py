"""tethertrain: a desk-scale teacher-arm training rig.

A compliant robot-arm teacher (admittance XY, height curriculum,
treadmill speed loop, swing strokes, failure handling) assists a student
policy trained by PPO, with a dynamics-latent adaptation pipeline for
crossing from the randomized training set to a held-out rig, plus a
concatenation/history-regression baseline and a from-scratch swing-up
pipeline with spectral rewards.
"""

__version__ = "0.1.0"
