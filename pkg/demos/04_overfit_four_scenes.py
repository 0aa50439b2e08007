"""
Overfitting four scenes
=======================

A small model learns to reproduce the flow of four synthetic scenes. The
full 2000 step run takes about two minutes on one core; pass a smaller
step count on the command line for a quick look.
"""
import sys

from gmsf import SynthConfig, TrainConfig, evaluate, synth_scene, train

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
scenes = [synth_scene(SynthConfig(n_points=128, seed=100 + i)) for i in range(4)]
cfg = TrainConfig(n_points=128, d=32, gct_layers=2, k=8, batch_size=2,
                  total_steps=steps, lr_max=1e-3, augment=False)


def show(line):
    step = int(line.split()[0].split("=")[1])
    if step % max(1, steps // 10) == 0:
        print(line)


model, records = train(cfg, scenes, on_record=show)
metrics = evaluate(model, scenes)
for split, m in metrics.items():
    print(split, m.to_record())
