"""Stand up a real reconstruction service for the UI integration test.

Usage: python3 fixture.py <workdir> <port>

Generates a small phantom dataset and a desk-configuration checkpoint under
<workdir> (reused if present), then serves them on 127.0.0.1:<port>.
"""

import sys
from pathlib import Path

import torch

torch.set_num_threads(1)

from dualarb import phantom, service, trainer
from dualarb.model import ModelConfig


def main() -> None:
    root = Path(sys.argv[1])
    port = int(sys.argv[2])
    data = root / "data"
    if not (data / "train.json").exists():
        # canvas 96 so scale 1.5 gives a 64x64 LR grid
        phantom.generate_dataset(data, seed=3, n_subjects=3, canvas=(96, 96),
                                 ratios=(0.4, 0.3, 0.3))
    ckpt = root / "desk.zip"
    if not ckpt.exists():
        state = trainer.init_state(ModelConfig(), trainer.CurriculumSchedule(),
                                   seed=0)
        trainer.save_checkpoint(state, ckpt)

    app = service.create_app(checkpoint_path=ckpt, data_dir=data, split="test")

    import uvicorn

    uvicorn.run(app, host="127.0.0.1", port=port, log_level="warning")


if __name__ == "__main__":
    main()
