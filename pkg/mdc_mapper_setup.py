#!/usr/bin/env python3
"""
MDC Mapper - Setup Script
Creates a virtual environment, installs the requirements, checks that the
numeric stack imports inside it and writes run scripts.
"""

import logging
import os
import platform
import subprocess
import sys
import venv
from pathlib import Path
from typing import Callable, Optional, Sequence, Tuple

MIN_PYTHON = (3, 9)
VENV_NAME = "mdc_mapper_venv"
LAUNCHER_NAME = "mdc_mapper_launcher.py"
STACK_MODULES: Sequence[str] = ("numpy", "sympy", "networkx", "pandas")


def _setup_logger() -> logging.Logger:
    # Setup has its own console handler; the launcher configures the root logger.
    log = logging.getLogger("MdcMapperSetup")
    log.setLevel(logging.INFO)
    if not log.handlers:
        handler = logging.StreamHandler(sys.stdout)
        handler.setFormatter(logging.Formatter('%(asctime)s [setup] %(levelname)s: %(message)s'))
        log.addHandler(handler)
    log.propagate = False
    return log


setup_logger = _setup_logger()


class MdcMapperSetup:
    def __init__(self, script_dir: Optional[Path] = None, platform_system: Optional[str] = None,
                 ask: Callable[[str], str] = input):
        self.platform_system = platform_system or platform.system()
        self.python_version_info = sys.version_info
        self.script_dir = Path(script_dir or Path(__file__).parent).resolve()
        self.venv_name = VENV_NAME
        self.venv_path = self.script_dir / VENV_NAME
        self.requirements = self.script_dir / "requirements.txt"
        self.ask = ask

    @property
    def windows(self) -> bool:
        return self.platform_system == "Windows"

    @property
    def run_script_name(self) -> str:
        return "run_mdc_mapper.bat" if self.windows else "run_mdc_mapper.sh"

    def check_python_version(self) -> bool:
        found = ".".join(str(v) for v in tuple(self.python_version_info[:3]))
        if tuple(self.python_version_info[:2]) < MIN_PYTHON:
            setup_logger.error(f"Python {found} found; the mapper needs {MIN_PYTHON[0]}.{MIN_PYTHON[1]}+.")
            return False
        setup_logger.info(f"Python {found}: OK")
        return True

    def create_or_confirm_virtual_env(self) -> Optional[Path]:
        if (self.venv_path / "pyvenv.cfg").is_file():
            setup_logger.info(f"Reusing virtual environment {self.venv_path}")
            return self.venv_path
        setup_logger.info(f"Creating virtual environment {self.venv_path}")
        try:
            venv.EnvBuilder(with_pip=True).create(str(self.venv_path))
        except (OSError, subprocess.CalledProcessError) as e:
            setup_logger.error(f"Could not create {self.venv_name}: {e}")
            return None
        return self.venv_path

    def get_venv_paths(self) -> Tuple[Path, Path]:
        """Interpreter and pip inside the venv."""
        bin_dir = self.venv_path / ("Scripts" if self.windows else "bin")
        suffix = ".exe" if self.windows else ""
        return bin_dir / f"python{suffix}", bin_dir / f"pip{suffix}"

    def _venv_call(self, *args: str) -> bool:
        python_exe, _ = self.get_venv_paths()
        try:
            subprocess.check_call([str(python_exe), *args])
        except (OSError, subprocess.CalledProcessError) as e:
            setup_logger.error(f"{' '.join(args[:3])} failed: {e}")
            return False
        return True

    def install_python_dependencies(self) -> bool:
        python_exe, _ = self.get_venv_paths()
        if not python_exe.exists():
            setup_logger.error(f"No interpreter in {self.venv_path}; create the environment first.")
            return False
        if not self.requirements.is_file():
            setup_logger.error(f"Missing {self.requirements}")
            return False
        if not self._venv_call("-m", "pip", "install", "-r", str(self.requirements)):
            return False
        return self.verify_stack()

    def verify_stack(self) -> bool:
        """Import the numeric stack with the venv interpreter."""
        ok = self._venv_call("-c", "import " + ", ".join(STACK_MODULES))
        if ok:
            setup_logger.info(f"Imported {', '.join(STACK_MODULES)} in {self.venv_name}")
        return ok

    def run_script_content(self) -> str:
        if self.windows:
            return (f'@echo off\r\n'
                    f'"%~dp0{VENV_NAME}\\Scripts\\python.exe" "%~dp0{LAUNCHER_NAME}" %*\r\n'
                    f'exit /b %ERRORLEVEL%\r\n')
        return f'''#!/bin/bash
SCRIPT_DIR="$(cd "$(dirname "${{BASH_SOURCE[0]}}")" &>/dev/null && pwd)"
PYTHON_EXEC="$SCRIPT_DIR/{VENV_NAME}/bin/python"
[ -x "$PYTHON_EXEC" ] || {{ echo "mdc-mapper: run 'python mdc_mapper_setup.py' first" >&2; exit 2; }}
exec "$PYTHON_EXEC" "$SCRIPT_DIR/{LAUNCHER_NAME}" "$@"
'''

    def create_run_scripts(self) -> Optional[Path]:
        script_path = self.script_dir / self.run_script_name
        try:
            with open(script_path, 'w', newline='') as f:
                f.write(self.run_script_content())
            if not self.windows:
                os.chmod(script_path, 0o755)
        except OSError as e:
            setup_logger.error(f"Could not write {script_path.name}: {e}")
            return None
        setup_logger.info(f"Wrote {script_path.name}")
        return script_path

    def confirm(self, question: str) -> bool:
        return self.ask(f"\n{question} (y/n): ").strip().lower() == 'y'

    def run_full_setup(self) -> int:
        if not self.check_python_version():
            return 1
        if self.create_or_confirm_virtual_env() is None:
            return 1
        if self.confirm(f"Install packages from {self.requirements.name}?"):
            if not self.install_python_dependencies():
                setup_logger.warning("Dependencies are incomplete; mdc-mapper commands may fail to import.")
        if self.confirm(f"Write {self.run_script_name}?"):
            self.create_run_scripts()
        setup_logger.info(f"Done. Try: ./{self.run_script_name} check --suite")
        return 0


if __name__ == "__main__":
    sys.exit(MdcMapperSetup().run_full_setup())
