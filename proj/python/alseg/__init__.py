# Copyright 2026 The alseg Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#    http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Active learning for semantic segmentation with rareness-aware selection.

Thin wrapper over the C++ library. Images are float32 arrays of shape
(H, W) or (H, W, C); masks are uint8 arrays of shape (H, W).
"""

from ._alseg import (
    ArgumentError,
    ConfigError,
    ContractError,
    Dataset,
    FormatError,
    GenerationError,
    IoError,
    NetParams,
    ValidationError,
    check_ce_gradients,
    check_greedy_oracle,
    check_info_nce_gradients,
    check_reductions,
    class_frequencies,
    class_posterior,
    class_weights,
    entropy,
    entropy_score,
    generate_dataset,
    image_embedding,
    info_nce_loss,
    init_params,
    miou,
    predict,
    predict_labels,
    pretrain,
    rareness,
    run_cli,
    select,
    softmax,
    train,
    transfer,
    weighted_cross_entropy,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
