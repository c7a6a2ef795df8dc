"""Smoke test for the polidist_py extension.

Build first:
    cargo build --release -p polidist-py --features extension-module
then run:
    python3 python/smoke_test.py
The module is imported from the Python path when installed, otherwise
from the cargo target directory.
"""

import importlib.machinery
import importlib.util
import json
import pathlib
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load_module():
    try:
        import polidist_py

        return polidist_py
    except ImportError:
        pass
    for profile in ("release", "debug"):
        for name in ("libpolidist_py.so", "libpolidist_py.dylib", "polidist_py.dll"):
            path = ROOT / "target" / profile / name
            if path.exists():
                loader = importlib.machinery.ExtensionFileLoader("polidist_py", str(path))
                spec = importlib.util.spec_from_file_location("polidist_py", path, loader=loader)
                module = importlib.util.module_from_spec(spec)
                loader.exec_module(module)
                return module
    sys.exit("polidist_py not built; see the module docstring")


def main():
    pd = load_module()
    assert "grid1" in pd.builtin_layouts()

    env = pd.GridEnv("grid1", size=6, max_steps=12)
    assert env.reset() == (0, 0)
    obs = env.observation()
    assert len(obs) == 36 and sum(obs) == 1.0
    cell, reward, done = env.step(1)
    assert cell == (1, 0) and not done and reward < 0
    assert len(env.layout_text().splitlines()) == 6

    with tempfile.TemporaryDirectory() as tmp:
        config = {
            "env": {"family": "grid", "id": "grid1", "size": 6, "max_steps": 12},
            "model": {"latent_dim": 2, "hidden": [8], "recog_hidden": [4]},
            "train": {"total_updates": 3, "episodes_per_update": 2, "n_parallel_envs": 1, "k": 4, "m": 2},
            "output_dir": tmp,
            "seed": 4,
        }
        curve = pd.train(json.dumps(config))
        again = pd.train(json.dumps(config), ["train.total_updates=3"])
        assert len(curve) == 3 and curve == again

        policy = pd.Policy.load(str(pathlib.Path(tmp) / "checkpoint.json"))
        assert policy.env == "grid1" and policy.latent_dim == 2
        z = policy.sample_latent(7)
        probs = policy.action_probs(obs, z)
        assert len(probs) == 4 and abs(sum(probs) - 1.0) < 1e-12

        try:
            pd.train(json.dumps(config), ["train.bogus=1"])
        except ValueError:
            pass
        else:
            raise AssertionError("unknown key accepted")

    passed, report = pd.verify("env-oracle", 1)
    assert passed and json.loads(report)["multiroom_seeds"] == 1000
    print("polidist_py smoke test passed")


if __name__ == "__main__":
    main()
