# Generated by Django 5.2.8 on 2026-10-12 09:14

import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='TrainingRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('updated_at', models.DateTimeField(auto_now=True)),
                ('name', models.CharField(max_length=255)),
                ('output_dir', models.CharField(max_length=1024)),
                ('variant', models.CharField(max_length=32)),
                ('instances', models.PositiveSmallIntegerField(default=1)),
                ('arch_hash', models.CharField(max_length=8)),
                ('seed', models.BigIntegerField(default=0)),
                ('status', models.CharField(choices=[('running', 'Running'), ('finished', 'Finished'), ('failed', 'Failed')], default='running', max_length=16)),
                ('best_epoch', models.PositiveIntegerField(blank=True, null=True)),
                ('best_val_oa', models.FloatField(blank=True, null=True)),
                ('sweep_param', models.CharField(blank=True, default='', max_length=64)),
                ('sweep_value', models.CharField(blank=True, default='', max_length=64)),
            ],
            options={
                'ordering': ['-id'],
            },
        ),
        migrations.CreateModel(
            name='EpochRecord',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('updated_at', models.DateTimeField(auto_now=True)),
                ('epoch', models.PositiveIntegerField()),
                ('lr', models.FloatField()),
                ('loss', models.FloatField()),
                ('train_oa', models.FloatField()),
                ('val_oa', models.FloatField()),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='epochs', to='training.trainingrun')),
            ],
            options={
                'ordering': ['run', 'epoch'],
                'unique_together': {('run', 'epoch')},
            },
        ),
    ]
