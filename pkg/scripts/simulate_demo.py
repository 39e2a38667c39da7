"""Closed-loop demo: oracle replay versus a briefly trained network.

Usage: python scripts/simulate_demo.py [--episodes 4] [--epochs 20] [--out runs/demo]
"""

import argparse
from pathlib import Path

from gdpp.config import ModelConfig, TrainConfig, config_hash
from gdpp.plotting import plot_scene
from gdpp.scenario import GeneratorSpec, generate_scenario
from gdpp.simulator import (
    METRIC_COLUMNS, NetworkPlanner, OraclePlanner, aggregate, gradient_refiner, run_episodes, write_report,
)
from gdpp.training import train


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--episodes", type=int, default=4)
    parser.add_argument("--epochs", type=int, default=20)
    parser.add_argument("--template", default="intersection")
    parser.add_argument("--out", default="runs/demo")
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    cfg = ModelConfig.desk(decoder_hidden=64)
    spec = GeneratorSpec(template=args.template, num_agents=5, history=cfg.history, lane_points=cfg.lane_points,
                         max_neighbors=cfg.neighbors, episode_seconds=10.0)
    train_frames = [generate_scenario(seed, spec) for seed in range(100, 132)]
    config = TrainConfig(batch_size=8, epochs=args.epochs, model=cfg)
    model, _ = train(train_frames, config)

    frames = [generate_scenario(seed, spec) for seed in range(args.episodes)]
    runs = {
        "oracle": run_episodes(frames, OraclePlanner, cfg),
        "network": run_episodes(frames, lambda f: NetworkPlanner(model), cfg),
        "network+refiner": run_episodes(frames, lambda f: NetworkPlanner(model), cfg, refiner=gradient_refiner()),
    }
    for name, results in runs.items():
        write_report(out / f"{name}.csv", frames, results, config_hash(config))
        agg = aggregate(results)
        summary = ", ".join(f"{c}={agg[c]:.3g}" for c in METRIC_COLUMNS if agg[c] is not None)
        print(f"{name:16s} {summary}")
    plot_scene(frames[0], out / "scene0.svg", plan=frames[0].gt_futures[0])
    print(f"reports and a scene plot written to {out}")


if __name__ == "__main__":
    main()
