"""
Base class for the engine's management commands.

Engine errors become ``CommandError`` with the error's exit code, so the
shell sees 2 for config problems, 3 for data problems and so on.
"""
import logging

from django.core.management.base import BaseCommand, CommandError

from utils.exceptions import MrcnError

logger = logging.getLogger(__name__)


class EngineCommand(BaseCommand):
    title = ''

    def handle(self, *args, **options):
        self.banner(self.title or self.help)
        try:
            return self.run(**options)
        except MrcnError as e:
            logger.error(f'{type(e).__name__}: {e}')
            raise CommandError(str(e), returncode=e.exit_code) from e

    def run(self, **options):
        raise NotImplementedError

    def banner(self, text):
        self.stdout.write(self.style.HTTP_INFO('=' * 70))
        self.stdout.write(self.style.HTTP_INFO(text))
        self.stdout.write(self.style.HTTP_INFO('=' * 70))
