from achelous.data.dataset import Batch, SynthDataset, collate, export_dataset, load_dataset, split_indices
from achelous.data.synth import Sample, SceneSpec, generate_sample, generate_samples, simulate_radar

__all__ = [
    "Batch",
    "Sample",
    "SceneSpec",
    "SynthDataset",
    "collate",
    "export_dataset",
    "generate_sample",
    "generate_samples",
    "load_dataset",
    "simulate_radar",
    "split_indices",
]
