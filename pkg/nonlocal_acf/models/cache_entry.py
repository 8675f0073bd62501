from sqlalchemy import Column, Float, Integer, String, UniqueConstraint

from nonlocal_acf.models.base import Base


class CacheEntry(Base):
    """One memoized evaluation of a derived field at a quantized point."""

    id = Column(Integer, primary_key=True, index=True)
    field_key = Column(String(512), nullable=False, index=True)
    point_key = Column(String(256), nullable=False)
    value = Column(Float, nullable=False)

    __table_args__ = (UniqueConstraint("field_key", "point_key", name="uq_field_point"),)
