"""Achelous: unified camera + 4D radar panoptic perception on a numpy tensor engine."""
