# Copyright 2026 The CVR Clean Room Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Python bindings for the split-learning clean-room trainer."""

from ._core import (
    Model,
    __version__,
    calibration_ratio,
    codec_roundtrip,
    evaluate,
    flip_labels,
    generate,
    keep_prob,
    leakage_csv,
    log_loss,
    loss_and_grad,
    recover_labels,
    roc_auc,
    split_train,
    wire_bytes,
)

__all__ = [
    "Model",
    "calibration_ratio",
    "codec_roundtrip",
    "evaluate",
    "flip_labels",
    "generate",
    "keep_prob",
    "leakage_csv",
    "log_loss",
    "loss_and_grad",
    "recover_labels",
    "roc_auc",
    "split_train",
    "wire_bytes",
]
