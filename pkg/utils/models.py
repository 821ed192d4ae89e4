from django.db import models


class WithTimeStamps(models.Model):
    """Registry rows record when a run or epoch was first written and last touched."""

    created_at = models.DateTimeField(auto_now_add=True)
    updated_at = models.DateTimeField(auto_now=True)

    class Meta:
        abstract = True
