from django.apps import AppConfig


class OutliersConfig(AppConfig):
    name = 'outliers'
    verbose_name = 'Outlier evaluator detection'
