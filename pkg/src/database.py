from sqlalchemy import Column, DateTime, Integer, MetaData, String, Table, Text, create_engine, select
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional
import json
import logging

logger = logging.getLogger(__name__)


class ResultStore:
    def __init__(self, database_url: str):
        """Open the run archive at database_url (any SQLAlchemy URL)."""
        self.database_url = database_url
        connect_args = {"check_same_thread": False} if database_url.startswith('sqlite') else {}
        self.engine = create_engine(database_url, connect_args=connect_args)
        self.metadata = MetaData()

        # One row per CLI invocation
        self.runs = Table(
            'runs',
            self.metadata,
            Column('id', Integer, primary_key=True, autoincrement=True),
            Column('subcommand', String, nullable=False),
            Column('argv', Text, nullable=False),      # JSON list
            Column('exit_code', Integer, nullable=False),
            Column('summary', Text),                    # JSON report, null on failure
            Column('created_at', DateTime, nullable=False)
        )

    def init_db(self):
        """Create the runs table if it does not exist yet."""
        try:
            # Make sure the directory of a file-backed sqlite database exists
            if self.database_url.startswith('sqlite:///') and not self.database_url.endswith(':memory:'):
                db_path = Path(self.database_url.replace('sqlite:///', '', 1))
                db_path.parent.mkdir(parents=True, exist_ok=True)

            self.metadata.create_all(self.engine)
            logger.debug("Run archive tables initialized")
        except Exception as e:
            logger.error(f"Error creating run archive tables: {str(e)}")
            raise

    def record(self, subcommand: str, argv: List[str], exit_code: int,
               summary: Optional[Dict[str, Any]] = None) -> int:
        """Archive one run and return its id."""
        try:
            with self.engine.begin() as conn:
                result = conn.execute(
                    self.runs.insert().values(
                        subcommand=subcommand,
                        argv=json.dumps(argv),
                        exit_code=exit_code,
                        summary=json.dumps(summary) if summary is not None else None,
                        created_at=datetime.now(timezone.utc)
                    )
                )
                run_id = result.inserted_primary_key[0]
            logger.info(f"Archived {subcommand} run {run_id} (exit {exit_code})")
            return run_id
        except Exception as e:
            logger.error(f"Error archiving run: {str(e)}")
            raise

    def recent(self, limit: int = 10) -> List[Dict[str, Any]]:
        """Most recent runs first."""
        try:
            with self.engine.connect() as conn:
                rows = conn.execute(
                    select(self.runs).order_by(self.runs.c.id.desc()).limit(limit)
                ).all()
            return [{
                'id': row.id,
                'subcommand': row.subcommand,
                'argv': json.loads(row.argv),
                'exit_code': row.exit_code,
                'summary': json.loads(row.summary) if row.summary is not None else None,
                'created_at': row.created_at.isoformat()
            } for row in rows]
        except Exception as e:
            logger.error(f"Error reading run archive: {str(e)}")
            return []
