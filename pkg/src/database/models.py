"""
SQLAlchemy ORM models for the run cache.

A Run is one (config, seed) training + evaluation job; its scalar results
are stored as RunMetric rows keyed by metric name.
"""

from sqlalchemy import Column, Float, ForeignKey, Index, Integer, JSON, String
from sqlalchemy.orm import declarative_base, relationship

Base = declarative_base()


class Run(Base):
    """One finished experiment run"""
    __tablename__ = 'runs'

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_key = Column(String(64), nullable=False)     # hash of (config, seed, dataset)
    mode = Column(String(8), nullable=False)         # 'JOIM', 'SIL', 'EM'
    seed = Column(Integer, nullable=False)
    toggles = Column(JSON)                           # e.g. {'scheduler': True, 'balance': False}
    config_hash = Column(String(64), nullable=False)
    dataset_hash = Column(String(64))
    report_hash = Column(String(64))

    metrics = relationship("RunMetric", back_populates="run", cascade="all, delete-orphan")

    __table_args__ = (
        Index('idx_run_key', 'run_key', unique=True),
    )

    def __repr__(self):
        return f"<Run(mode={self.mode}, seed={self.seed}, key={self.run_key[:8]})>"


class RunMetric(Base):
    """A named scalar result of a run (ne_task_0, recall_at_100, ...)"""
    __tablename__ = 'run_metrics'

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(Integer, ForeignKey('runs.id'), nullable=False)
    name = Column(String(64), nullable=False)
    value = Column(Float)

    run = relationship("Run", back_populates="metrics")

    __table_args__ = (
        Index('idx_metric_run_name', 'run_id', 'name', unique=True),
    )

    def __repr__(self):
        return f"<RunMetric({self.name}={self.value})>"
