#!/usr/bin/env python3
"""
Setup script for dcscan.

Installs dependencies, creates the working directories and runs a smoke test.
"""

import sys
import subprocess
from pathlib import Path


MINIMUM_PYTHON = (3, 9)
REQUIREMENTS = Path("requirements.txt")


def check_python_version(minimum=MINIMUM_PYTHON):
    """Fail on interpreters older than ``minimum`` (the oldest one the pinned scipy and pandas support)."""
    found = sys.version_info[:2]
    if found < minimum:
        print(f"❌ dcscan needs Python {minimum[0]}.{minimum[1]} or newer, found {found[0]}.{found[1]}")
        return False
    print(f"✅ Python {found[0]}.{found[1]} at {sys.executable}")
    return True


def install_dependencies(requirements=REQUIREMENTS):
    """Install the numerical stack and the dev tools listed in requirements.txt."""
    if not requirements.exists():
        print(f"❌ {requirements} not found; run setup from the repository root")
        return False
    print(f"📦 Installing numpy, scipy, pandas and friends from {requirements}...")
    result = subprocess.run([sys.executable, "-m", "pip", "install", "-r", str(requirements)], check=False)
    if result.returncode != 0:
        print(f"❌ pip exited with status {result.returncode}")
        return False
    print("✅ Dependencies installed")
    return True


def create_directories():
    """Create necessary directories."""
    for directory in ["logs", "runs"]:
        Path(directory).mkdir(parents=True, exist_ok=True)
        print(f"✅ Created directory: {directory}")


def create_env_file():
    """Create .env file if it doesn't exist."""
    env_file = Path(".env")
    if not env_file.exists():
        env_content = """# dcscan Environment Variables

# Optional: worker threads for batched inference
DCSCAN_THREADS=1

# Optional: set to 1 to include the slow training tests
DCSCAN_RUN_SLOW=0

# Optional: custom configuration file path
DCSCAN_CONFIG=config/config.yaml
"""
        env_file.write_text(env_content)
        print("✅ Created .env file")
    else:
        print("✅ .env file already exists")


def run_tests():
    """Run a smoke test to verify setup."""
    print("🧪 Running smoke test...")
    try:
        sys.path.append(str(Path(__file__).parent / "src"))
        from src.utils.helpers import load_config, resolve_config
        config = resolve_config(load_config("config/config.yaml"))
        print("✅ Configuration loaded and validated")

        from src.data.synthetic import SyntheticSpec, gen_synthetic
        dataset = gen_synthetic(SyntheticSpec.from_config(config))
        print(f"✅ Synthetic data generated: {len(dataset.labeled_images)} labeled, "
              f"{len(dataset.unlabeled_images)} unlabeled, {len(dataset.test_images)} test images")

        from src.network.segnet import NetworkConfig, build_pair
        net_a, _, net_b, _ = build_pair(NetworkConfig.from_config(config), seed=config["trainer"]["seed"])
        print(f"✅ Networks built: {net_a.num_parameters()} parameters each "
              f"({net_a.route_set.value} / {net_b.route_set.value})")

        print("✅ All checks passed!")
        return True

    except Exception as e:
        print(f"❌ Smoke test failed: {e}")
        return False


def main():
    """Main setup function."""
    print("🚀 dcscan Setup")
    print("=" * 40)

    if not check_python_version():
        return

    create_directories()

    if not install_dependencies():
        print("❌ Setup failed due to dependency installation error")
        return

    create_env_file()

    if not run_tests():
        print("❌ Setup failed due to smoke test failures")
        return

    print("\n🎉 Setup completed successfully!")
    print("\nNext steps:")
    print("1. Run: python main.py demo scan --size 3")
    print("2. Run: python main.py train --config config/config.yaml --iterations 50")
    print("3. Run: pytest tests/")
    print("\nFor help, see README.md")


BUILD_COMMANDS = {"egg_info", "dist_info", "bdist_wheel", "editable_wheel", "build", "build_py", "sdist", "develop", "install"}


if __name__ == "__main__":
    if BUILD_COMMANDS.intersection(sys.argv[1:]):
        # Invoked by pip / the setuptools build backend: build the package.
        from setuptools import setup, find_packages
        setup(
            name="dcscan",
            version="0.1.0",
            python_requires=">=3.9",
            packages=find_packages(include=["src", "src.*"]),
            install_requires=[
                "numpy>=1.24.0",
                "scipy>=1.11.0",
                "pandas>=2.2.0",
                "pyyaml==6.0.1",
                "python-dotenv==1.0.0",
                "click==8.1.7",
            ],
        )
    else:
        main()
