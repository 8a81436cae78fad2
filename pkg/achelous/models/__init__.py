from achelous.models.achelous_net import AchelousNet, AchelousOutput
from achelous.models.config import ModelConfig

__all__ = ["AchelousNet", "AchelousOutput", "ModelConfig"]
