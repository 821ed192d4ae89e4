from django.db import models

from utils.models import WithTimeStamps


class TrainingRun(WithTimeStamps):
    STATUS_RUNNING = 'running'
    STATUS_FINISHED = 'finished'
    STATUS_FAILED = 'failed'
    STATUS_CHOICES = [
        (STATUS_RUNNING, 'Running'),
        (STATUS_FINISHED, 'Finished'),
        (STATUS_FAILED, 'Failed'),
    ]

    name = models.CharField(max_length=255)
    output_dir = models.CharField(max_length=1024)
    variant = models.CharField(max_length=32)
    instances = models.PositiveSmallIntegerField(default=1)
    arch_hash = models.CharField(max_length=8)
    seed = models.BigIntegerField(default=0)
    status = models.CharField(max_length=16, choices=STATUS_CHOICES, default=STATUS_RUNNING)
    best_epoch = models.PositiveIntegerField(null=True, blank=True)
    best_val_oa = models.FloatField(null=True, blank=True)
    sweep_param = models.CharField(max_length=64, blank=True, default='')
    sweep_value = models.CharField(max_length=64, blank=True, default='')

    class Meta:
        ordering = ['-id']

    def __str__(self):
        return f"{self.name} ({self.variant}, {self.status})"


class EpochRecord(WithTimeStamps):
    run = models.ForeignKey(TrainingRun, on_delete=models.CASCADE, related_name='epochs')
    epoch = models.PositiveIntegerField()
    lr = models.FloatField()
    loss = models.FloatField()
    train_oa = models.FloatField()
    val_oa = models.FloatField()

    class Meta:
        ordering = ['run', 'epoch']
        unique_together = [('run', 'epoch')]

    def __str__(self):
        return f"{self.run.name} epoch {self.epoch}: val OA {self.val_oa:.4f}"
