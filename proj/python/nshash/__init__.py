# Copyright 2026 The nshash Authors
# SPDX-License-Identifier: Apache-2.0
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

"""Compact binary codes for Hamming-distance retrieval."""

from ._nshash import (
    VARIANTS,
    FormatError,
    Model,
    evaluate,
    run_experiment,
    similarity,
    synth_clusters,
    train,
)

__all__ = [
    "VARIANTS",
    "FormatError",
    "Model",
    "evaluate",
    "run_experiment",
    "similarity",
    "synth_clusters",
    "train",
]
