"""End-to-end pipeline on pre-initialized weights (no training).

Runs every stage (transforms, cost volume, WTA, confidence, filtering,
metrics) on one synthetic scene with freshly initialized networks, then
reruns and checks the output trees are byte-identical.  With untrained
weights the numbers are meaningless; the point is the plumbing and the
reproducibility contract.  See the README for the full trained run.
"""

import hashlib
from pathlib import Path

from semistereo import evalnet, matchnet
from semistereo.pipeline import PipelineConfig, SynthConfig, run_pipeline
from semistereo.tensornet import init_params, save_params

work = Path("demo_out/pipeline")
work.mkdir(parents=True, exist_ok=True)
matcher_path = work / "matcher.ssnw"
evaluator_path = work / "evaluator.ssnw"
matcher_path.write_bytes(
    save_params(init_params(matchnet.matching_net_spec(), matchnet.INPUT_SHAPE, seed=1))
)
evaluator_path.write_bytes(
    save_params(init_params(evalnet.evaluation_net_spec(), evalnet.INPUT_SHAPE, seed=2))
)


def digest(root: Path) -> dict:
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


trees = []
for run in ("run_a", "run_b"):
    cfg = PipelineConfig(
        out_dir=str(work / run),
        synth=SynthConfig(width=112, height=112, ndisp=8, train_scenes=1, eval_scenes=1),
        seed=4,
        train=False,
        matcher_weights=str(matcher_path),
        evaluator_weights=str(evaluator_path),
    )
    reports, manifest = run_pipeline(cfg)
    trees.append(digest(work / run))
    print(f"{run}: {len(manifest['files'])} files, config hash {manifest['config_hash'][:12]}")

print("byte-identical reruns:", trees[0] == trees[1])
