#!/usr/bin/env python3
"""
CPC-SNN Run Provenance
Host facts and timezone-aware timestamps recorded alongside every run summary
"""

import platform
import sys
from datetime import datetime
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, Optional

import psutil
import pytz

from config.settings import get_logger

logger = get_logger(__name__)

TRACKED_PACKAGES = ("numpy", "python-dotenv", "Pillow", "psutil", "pytz")

def local_now(timezone_name: str = "UTC") -> datetime:
    """Current time in the configured timezone (UTC when the name is unknown)"""
    try:
        tz = pytz.timezone(timezone_name)
    except pytz.UnknownTimeZoneError:
        logger.warning(f"⚠️ Unknown timezone {timezone_name!r}, using UTC")
        tz = pytz.UTC
    return datetime.now(tz)

class SystemStatusMonitor:
    """Snapshot of the machine a run executes on"""

    def __init__(self, out_dir: Optional[Path] = None):
        self.out_dir = Path(out_dir) if out_dir is not None else Path.cwd()

    def check_memory_usage(self) -> Dict[str, Any]:
        """Check memory usage"""
        try:
            memory = psutil.virtual_memory()
            return {
                "usage_percent": memory.percent,
                "available_gb": round(memory.available / (1024**3), 2),
                "total_gb": round(memory.total / (1024**3), 2)
            }
        except Exception as e:
            logger.error(f"❌ Error checking memory: {e}")
            return {"error": str(e)}

    def check_disk_space(self) -> Dict[str, Any]:
        """Free space where run artifacts are written"""
        try:
            target = self.out_dir if self.out_dir.exists() else Path(self.out_dir.anchor or "/")
            disk_usage = psutil.disk_usage(str(target))
            return {
                "free_gb": round(disk_usage.free / (1024**3), 2),
                "total_gb": round(disk_usage.total / (1024**3), 2)
            }
        except Exception as e:
            logger.error(f"❌ Error checking disk space: {e}")
            return {"error": str(e)}

    def check_cpu(self) -> Dict[str, Any]:
        return {
            "logical_cores": psutil.cpu_count(logical=True),
            "physical_cores": psutil.cpu_count(logical=False),
        }

    @staticmethod
    def package_versions() -> Dict[str, Optional[str]]:
        versions = {}
        for name in TRACKED_PACKAGES:
            try:
                versions[name] = metadata.version(name)
            except metadata.PackageNotFoundError:
                versions[name] = None
        return versions

    def snapshot(self) -> Dict[str, Any]:
        """Everything recorded in a run summary's provenance block"""
        return {
            "python": sys.version.split()[0],
            "platform": platform.platform(),
            "cpu": self.check_cpu(),
            "memory": self.check_memory_usage(),
            "disk": self.check_disk_space(),
            "packages": self.package_versions(),
        }

def run_provenance(timezone_name: str, out_dir: Optional[Path] = None) -> Dict[str, Any]:
    return {
        "timestamp": local_now(timezone_name).isoformat(),
        "timezone": timezone_name,
        "host": SystemStatusMonitor(out_dir).snapshot(),
    }
