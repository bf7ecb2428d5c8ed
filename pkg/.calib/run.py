import json, time
import numpy as np
from refseg.dataset import SceneConfig, gen_dataset
from refseg.training import TrainConfig, train, load_checkpoint, evaluate_model

t0 = time.time()
train_set = gen_dataset(1234, 2000, SceneConfig())
eval_set = gen_dataset(5678, 200, SceneConfig())
print(f"datasets ready in {time.time()-t0:.1f}s", flush=True)

cfg = TrainConfig(max_iters=5000, batch_size=1, seed=0, precision="f32",
                  profile="desk", eval_every=250, eval_limit=50,
                  checkpoint_every=1000)
t0 = time.time()
summary = train(cfg, train_set, "/root/pkg/.calib/out", eval_samples=eval_set)
train_time = time.time() - t0
print(f"train time: {train_time/60:.1f} min", flush=True)

model, _, _ = load_checkpoint(summary["final_checkpoint"])
report = evaluate_model(model, eval_set)
print("FINAL REPORT")
print(report.table())
with open("/root/pkg/.calib/result.json", "w") as fh:
    json.dump({"train_minutes": train_time / 60, **report.to_dict()}, fh, indent=2)
