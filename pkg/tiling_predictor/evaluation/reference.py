"""
Published next-frame prediction results on the Comma AI driving test set.

These rows are documentation constants: reproducing them needs the external
dataset and full-scale training.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional

from tiling_predictor.evaluation.metrics import MSE_SCALE, EvalReport


@dataclass(frozen=True)
class ReferenceResult:
    model: str
    mse_e4: float
    ssim: float
    params: Optional[int] = None
    note: str = ""

    def as_report(self) -> EvalReport:
        return EvalReport(model=self.model, n_samples=0, mean_mse=self.mse_e4 / MSE_SCALE, mean_ssim=self.ssim)


REFERENCE_RESULTS: List[ReferenceResult] = [
    ReferenceResult("cdna", 3.986, 0.9836, 12_661_803),
    ReferenceResult("sdf", 23.670, 0.8312, 37_237_825),
    ReferenceResult("sdf-recurrent", 72.600, 0.6498, 70_800_449),
    ReferenceResult("copy", 79.20, 0.6671, 0),
    ReferenceResult("cdna-no-current-image", 6.362, 0.9778, note="current image left out of the kernel path"),
    ReferenceResult("cdna-no-skip-connection", 4.933, 0.9798, note="skip connections removed"),
    ReferenceResult("sdf-tiling", 7.050, 0.9184, 958_400, note="window 4"),
    ReferenceResult("sdf-tiling-16", 3.613, 0.9633, 986_048, note="window 16"),
    ReferenceResult("sdf-tiling-nb40", 3.940, 0.9576, 516_160, note="40 basis images, decoder (40, 40, 40)"),
]

# Parameter counts of the tiling models, reproduced exactly by build_sdf_tiling.
TILING_PARAM_COUNTS: Dict[str, int] = {
    "sdf-tiling": 958_400,
    "sdf-tiling-16": 986_048,
    "sdf-tiling-nb40": 516_160,
}


def reference_lines() -> List[str]:
    """Published rows in the report-line grammar (``n=0`` marks a published row)."""
    return [row.as_report().to_line() for row in REFERENCE_RESULTS]
