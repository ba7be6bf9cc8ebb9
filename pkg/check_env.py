"""
Simple script to check that LAB_* settings load correctly
"""

import os
import sys

from dotenv import load_dotenv

print("🔍 Checking environment variable setup...\n")

# Try loading from different .env files
env_files = ['.env', '.env.local']

for env_file in env_files:
    if os.path.exists(env_file):
        print(f"✅ Found {env_file}")
        load_dotenv(env_file)
    else:
        print(f"❌ {env_file} not found (defaults apply)")

from config import load_settings
from exceptions import ConfigError

try:
    lab_settings = load_settings()
except ConfigError as e:
    print(f"\n❌ {e.detail}")
    sys.exit(e.exit_code)

print(f"\n📋 Effective settings:")
for name, value in lab_settings.model_dump().items():
    source = "env" if os.getenv(f"LAB_{name.upper()}") is not None else "default"
    print(f"LAB_{name.upper()}: {value} ({source})")

out_dir = lab_settings.out_dir
if os.path.isdir(out_dir):
    print(f"\n✅ Output directory exists: {out_dir}")
else:
    print(f"\n⚠️  Output directory {out_dir} will be created on first run")

print(f"\n🎯 Current working directory: {os.getcwd()}")
