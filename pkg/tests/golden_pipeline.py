"""The canonical end-to-end pipeline over the bundled synthetic fixture.

Both the golden-file generator and the acceptance replay run exactly these
argv lists, from a working directory containing ``fixtures/`` (the inputs)
and ``out/`` (the artifacts). Paths are relative on purpose: the embedded
run configs must not depend on where the tree is checked out.
"""

KB = ["--kb", "fixtures/kb.json", "--kb-emb", "fixtures/kb.emb"]
DATASET = [
    "--dataset", "fixtures/dataset.jsonl",
    "--dataset-emb", "fixtures/dataset.emb",
    "--task", "fixtures/task.json",
]

ARTIFACTS = [
    "index.json",
    "thresholds.json",
    "splitplan.json",
    "tlc_model.json",
    "preds.jsonl",
    "eval.json",
]

STAGES = [
    ["index", *KB, "--include-examples", "--out", "out/index.json"],
    ["thresholds", *KB, "--method", "max", "--out", "out/thresholds.json"],
    [
        "tsplit", "run", *KB, *DATASET,
        "--mode", "full", "--method", "max", "--seed", "7",
        "--thresholds", "out/thresholds.json",
        "--out", "out/splitplan.json",
    ],
    [
        "tlc", "fit", *KB, *DATASET,
        "--split", "out/splitplan.json", "--split-role", "train",
        "--fusion", "image", "--k", "1", "--vote", "template",
        "--ood", "norm", "--seed", "7",
        "--out", "out/tlc_model.json",
    ],
    [
        "tlc", "predict", *KB, *DATASET,
        "--model", "out/tlc_model.json",
        "--split", "out/splitplan.json", "--split-role", "test",
        "--out", "out/preds.jsonl",
    ],
    [
        "eval", "f1",
        "--preds", "out/preds.jsonl",
        "--golds", "fixtures/dataset.jsonl",
        "--task", "fixtures/task.json",
        "--average", "macro",
        "--out", "out/eval.json",
    ],
]


def run_all(dispatch) -> None:
    for argv in STAGES:
        code = dispatch(argv)
        if code != 0:
            raise RuntimeError(f"pipeline stage failed ({code}): {' '.join(argv)}")
