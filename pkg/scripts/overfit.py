"""Overfit the desk-scale network on 16 generated frames and report the fit.

Usage: python scripts/overfit.py [--steps 500] [--out runs/overfit]
"""

import argparse
import time

from gdpp.config import ModelConfig, TrainConfig
from gdpp.model import collate
from gdpp.scenario import GeneratorSpec, generate_scenario
from gdpp.training import evaluate, train


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--steps", type=int, default=500)
    parser.add_argument("--frames", type=int, default=16)
    parser.add_argument("--out", default=None, help="directory for train_log.csv and checkpoints")
    args = parser.parse_args()

    cfg = ModelConfig.desk()
    spec = GeneratorSpec(template="straight", num_agents=5, history=cfg.history, lane_points=cfg.lane_points,
                         max_neighbors=cfg.neighbors, episode_seconds=cfg.future * cfg.dt)
    frames = [generate_scenario(seed, spec) for seed in range(args.frames)]
    # one batch holds every frame, so each epoch is a single Adam step
    config = TrainConfig(batch_size=args.frames, epochs=args.steps, halve_every=None, model=cfg)
    t0 = time.perf_counter()
    model, report = train(frames, config, out_dir=args.out)
    elapsed = time.perf_counter() - t0
    fit = evaluate(model, collate(frames, cfg))
    print(f"steps {len(report.steps)}  time {elapsed:.1f}s  parameters {model.num_parameters()}")
    print(f"loss {report.initial_loss:.4f} -> {report.final_loss:.4f} "
          f"({100 * report.final_loss / report.initial_loss:.2f}% of initial)")
    for key, value in fit.items():
        print(f"{key:9s} {value:.4f} m")


if __name__ == "__main__":
    main()
