"""Evaluation reports: a UTF-8 table for the terminal and a CSV file."""
import csv
import logging

from evaluation import metrics

logger = logging.getLogger(__name__)

CLASS_FIELDS = ['class', 'precision', 'recall', 'f1', 'reference_pixels', 'predicted_pixels']
SUMMARY_ROWS = (('OA', 'oa'), ('Kappa', 'kappa'), ('AA', 'aa'), ('F1', 'f1'))


def build_report(cm, aa_denominator='prediction'):
    counts = cm.counts
    rows = []
    for c, (p, r, f) in enumerate(zip(metrics.precision(cm), metrics.recall(cm), metrics.per_class_f1(cm))):
        rows.append({
            'class': c,
            'precision': p,
            'recall': r,
            'f1': f,
            'reference_pixels': int(counts[c].sum()),
            'predicted_pixels': int(counts[:, c].sum()),
        })
    return {
        'classes': rows,
        'summary': metrics.summary(cm, aa_denominator),
        'total': cm.total,
        'aa_denominator': aa_denominator,
    }


def render_table(report):
    lines = [
        f'{"class":>5} │ {"precision":>9} │ {"recall":>9} │ {"f1":>9} │ {"ref px":>10} │ {"pred px":>10}',
        '─' * 6 + '┼' + '─' * 11 + '┼' + '─' * 11 + '┼' + '─' * 11 + '┼' + '─' * 12 + '┼' + '─' * 11,
    ]
    for row in report['classes']:
        lines.append(
            f'{row["class"]:>5} │ {row["precision"]:>9.4f} │ {row["recall"]:>9.4f} │ {row["f1"]:>9.4f} │ '
            f'{row["reference_pixels"]:>10} │ {row["predicted_pixels"]:>10}'
        )
    lines.append('')
    for label, key in SUMMARY_ROWS:
        lines.append(f'{label:>5}   {report["summary"][key]:.4f}')
    lines.append(f'{"n":>5}   {report["total"]} labeled pixels (AA over {report["aa_denominator"]} marginal)')
    return '\n'.join(lines)


def write_csv(path, report):
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(CLASS_FIELDS)
        for row in report['classes']:
            writer.writerow([
                row['class'],
                f'{row["precision"]:.6f}',
                f'{row["recall"]:.6f}',
                f'{row["f1"]:.6f}',
                row['reference_pixels'],
                row['predicted_pixels'],
            ])
        for label, key in SUMMARY_ROWS:
            writer.writerow([label, f'{report["summary"][key]:.6f}'])
    logger.info(f'Wrote evaluation report {path}')
    return path
