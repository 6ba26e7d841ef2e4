import os

import django

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "evalguard.settings")
django.setup()
