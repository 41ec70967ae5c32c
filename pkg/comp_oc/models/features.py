from pydantic import BaseModel, ConfigDict, Field


class FeatureTuple(BaseModel):
    """Compositional features (r_max, Lambda, L_max, |V_G|) of a graph.

    Serialized as {r_max, lambda, l_max, v_g}; dump with ``by_alias=True``.
    """
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    r_max: float = Field(gt=0)
    lambda_: float = Field(ge=0, alias="lambda")
    l_max: float = Field(ge=0)
    v_g: int = Field(ge=0)

    def as_tuple(self):
        return (self.r_max, self.lambda_, self.l_max, self.v_g)
