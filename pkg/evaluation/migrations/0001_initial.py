# Generated by Django 5.0 on 2026-10-17 09:30

from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name='RunRecord',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('run_dir', models.CharField(db_index=True, max_length=512)),
                ('label', models.CharField(help_text='Checkpoint label, e.g. cure or cure_omega0.4', max_length=64)),
                ('method', models.CharField(choices=[('original', 'Original'), ('oracle', 'Retrain oracle'), ('cure', 'Circuit-aware unlearning'), ('uniform', 'Uniform update'), ('gradient_ascent', 'Gradient ascent'), ('pcgrad', 'Gradient surgery')], max_length=20)),
                ('auc', models.FloatField(blank=True, null=True)),
                ('acc', models.FloatField()),
                ('logloss', models.FloatField()),
                ('jsd_forget', models.FloatField(blank=True, null=True)),
                ('forget_auc', models.FloatField(blank=True, null=True)),
                ('unlearn_wall_seconds', models.FloatField(blank=True, null=True)),
                ('conflict_rate', models.FloatField(blank=True, null=True)),
                ('config_hash', models.CharField(blank=True, max_length=64)),
                ('config', models.JSONField(blank=True, default=dict)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
            ],
            options={
                'ordering': ['run_dir', 'label'],
                'indexes': [models.Index(fields=['run_dir', 'method'], name='rr_run_method_idx')],
                'constraints': [models.UniqueConstraint(fields=('run_dir', 'label'), name='rr_unique_run_label')],
            },
        ),
    ]
