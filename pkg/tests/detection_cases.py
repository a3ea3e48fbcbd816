"""Seeded detection/ground-truth cases with jittered true positives and stray false positives."""

from coopsim.core import AgentClass

CAR = AgentClass.CAR


def random_detection_case(rng):
    n_frames = int(rng.integers(1, 3))
    gts, dets = [], []
    for f in range(n_frames):
        for k in range(int(rng.integers(0, 5))):
            box = (12.0 * k, 0.0, float(rng.uniform(-3, 3)), 4.0, 2.0)
            cls = AgentClass(int(rng.integers(0, 2)))
            gts.append((f, box, cls))
            for _ in range(int(rng.integers(0, 3))):
                jit = (box[0] + rng.uniform(-1.5, 1.5), box[1] + rng.uniform(-1, 1), box[2] + rng.uniform(-0.4, 0.4),
                       4.0, 2.0)
                dets.append((f, float(rng.random()), jit, AgentClass(int(rng.integers(0, 2)))))
        for _ in range(int(rng.integers(0, 3))):
            dets.append((f, float(rng.random()), (float(rng.uniform(-5, 60)), 5.0, 0.0, 4.0, 2.0), CAR))
    return dets, gts
