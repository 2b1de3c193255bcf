from pydantic import BaseModel, Field, model_validator


class BandpassSpec(BaseModel):
    """Butterworth band-pass design request"""

    order: int = Field(default=5, ge=1)
    low: float = Field(..., gt=0, description="Hz")
    high: float = Field(..., gt=0, description="Hz")
    sample_rate: float = Field(..., gt=0, description="Hz")

    @model_validator(mode="after")
    def check_band(self) -> "BandpassSpec":
        if not self.low < self.high < self.sample_rate / 2:
            raise ValueError(
                f"band [{self.low}, {self.high}] Hz invalid for sample rate {self.sample_rate} Hz"
            )
        return self


class CircleFit(BaseModel):
    """Circle fitted to an I/Q arc"""

    center_i: float
    center_q: float
    radius: float = Field(..., gt=0)
    residual: float = Field(..., ge=0)
    iterations: int = 0

    @property
    def center(self) -> complex:
        return complex(self.center_i, self.center_q)
