from pydantic import BaseModel, Field
from typing import Optional, Dict, List, Literal, Union


class RunConfig(BaseModel):
    """One command's parameters; loaded from --config and overridden by flags"""
    medium: Optional[Union[str, Dict]] = None
    space: Optional[Union[str, Dict]] = None
    seed: Optional[int] = None
    p: Optional[List[float]] = None
    x: Optional[List[float]] = None
    t: Optional[float] = Field(default=None, ge=0)
    eps: Optional[float] = Field(default=None, gt=0)
    n: Optional[int] = Field(default=None, ge=1)
    replicas: int = Field(default=1, ge=1)
    tol: Optional[float] = Field(default=None, gt=0)
    K: Optional[float] = Field(default=None, ge=0)
    radius: Optional[int] = Field(default=None, ge=1)
    window: int = Field(default=2, ge=0)
    interior: int = Field(default=0, ge=0)
    directions: Optional[List[List[float]]] = None
    method: Literal["mu", "nu", "dual"] = "mu"
    phi: Literal["zero", "clamp", "piecewise"] = "zero"
    f0: Optional[List[float]] = None
    max_iter: Optional[int] = Field(default=None, ge=0)
    samples: int = Field(default=100, ge=1)
    count: int = Field(default=10, ge=1)
    trace: bool = False
    timing: bool = False
    out: Optional[str] = None
    format: Literal["json", "csv"] = "json"


class ResultRecord(BaseModel):
    command: str
    version: str
    seed: Optional[int] = None
    medium_hash: Optional[str] = None
    inputs: Dict
    outputs: Dict
    uncertainty: Optional[float] = None
    metadata: Dict = {}
    wall_clock_s: Optional[float] = None
