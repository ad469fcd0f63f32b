"""
Run reporting and logging utilities

Everything here prints to stderr; stdout is reserved for CSV tables.
"""
import json
import sys
from datetime import datetime
from typing import Any, Dict, List

from tqdm import tqdm


class RunReporter:
    """Step-by-step logging with a boxed summary for training and evaluation runs"""

    STATUS_ICONS = {
        'info': 'ℹ️',
        'success': '✅',
        'warning': '⚠️',
        'error': '❌',
        'processing': '🔄',
    }

    def __init__(self, stream=None):
        self.stream = stream
        self.enabled = True
        self.reset()

    def reset(self):
        self.run_start_time = None
        self.run_data = {
            'title': None,
            'timestamp': None,
            'duration': None,
            'steps': [],
            'summary': {
                'epochs': [],
                'evaluations': [],
                'artifacts': [],
                'errors': [],
            },
        }

    def configure(self, enabled=True, stream=None):
        """--quiet turns printing off; recording continues"""
        self.enabled = enabled
        if stream is not None:
            self.stream = stream

    def _print(self, text=''):
        if self.enabled:
            print(text, file=self.stream or sys.stderr)

    def start_run(self, title: str):
        """Mark the start of a command"""
        self.reset()
        self.run_start_time = datetime.now()
        self.run_data['title'] = title
        self.run_data['timestamp'] = self.run_start_time.strftime('%Y-%m-%d %H:%M:%S')

        banner = f'🚀 {title.upper()} STARTED'
        self._print('╔' + '═' * 78 + '╗')
        self._print('║' + banner.center(77) + '║')
        self._print('║' + f" Started at: {self.run_data['timestamp']}".ljust(78) + '║')
        self._print('╚' + '═' * 78 + '╝')
        self._print()

    def log_step(self, step_number: int, title: str, description: str = ''):
        step_info = {
            'number': step_number,
            'title': title,
            'description': description,
            'timestamp': datetime.now().strftime('%H:%M:%S'),
        }
        self.run_data['steps'].append(step_info)

        self._print(f'┌─ Step {step_number}: {title}')
        if description:
            self._print(f'│  {description}')
        self._print(f"│  ⏰ {step_info['timestamp']}")
        self._print('└' + '─' * 50)
        self._print()

    def log_substep(self, action: str, details: str = '', status: str = 'info'):
        icon = self.STATUS_ICONS.get(status, 'ℹ️')
        self._print(f'  {icon}  {action}')
        if details:
            self._print(f'      └─ {details}')

    def progress(self, iterable, description: str, total: int = None):
        """tqdm bar on stderr, silent when the reporter is disabled"""
        return tqdm(iterable, desc=f'  🔄  {description}', total=total, leave=False,
                    file=self.stream or sys.stderr, disable=not self.enabled)

    def record_epoch(self, epoch: int, train_loss: float, train_acc: float, val_acc: float):
        self.run_data['summary']['epochs'].append({
            'epoch': epoch,
            'train_loss': train_loss,
            'train_acc': train_acc,
            'val_acc': val_acc,
        })

    def record_evaluation(self, name: str, accuracy: float, samples: int, details: Dict[str, Any] = None):
        self.run_data['summary']['evaluations'].append({
            'name': name,
            'accuracy': accuracy,
            'samples': samples,
            'details': details or {},
        })

    def record_artifact(self, kind: str, path: str):
        self.run_data['summary']['artifacts'].append({'kind': kind, 'path': path})

    def record_error(self, error_type: str, message: str, details: Dict[str, Any] = None):
        self.run_data['summary']['errors'].append({
            'type': error_type,
            'message': message,
            'details': details or {},
            'time': datetime.now().strftime('%H:%M:%S'),
        })

    def end_run(self, success: bool = True):
        """Complete the run and show the summary"""
        end_time = datetime.now()
        start = self.run_start_time or end_time
        duration = end_time - start
        self.run_data['duration'] = duration.total_seconds()

        self._print()
        self._print('╔' + '═' * 78 + '╗')
        self._print('║' + '📊 RUN SUMMARY'.center(77) + '║')
        self._print('╚' + '═' * 78 + '╝')

        status = '✅ COMPLETED SUCCESSFULLY' if success else '❌ COMPLETED WITH ERRORS'
        self._print(f'\n🏁 Status: {status}')
        self._print(f'⏱️  Duration: {duration.total_seconds():.1f} seconds')
        self._print(f"📅 Completed at: {end_time.strftime('%Y-%m-%d %H:%M:%S')}")
        self._print_summary_tables()
        self._print('═' * 80 + '\n')

    def _print_summary_tables(self):
        summary = self.run_data['summary']
        self._print('\n┌─ 📋 RUN SUMMARY')
        self._print('│')

        epochs: List[Dict[str, Any]] = summary['epochs']
        if epochs:
            last = epochs[-1]
            self._print(f'│  🧠 Epochs: {len(epochs)}')
            self._print(f"│     Final loss: {last['train_loss']:.4f} | "
                        f"Train acc: {last['train_acc']:.3f} | Val acc: {last['val_acc']:.3f}")

        for evaluation in summary['evaluations']:
            self._print(f"│  🎯 {evaluation['name']:<12} accuracy {evaluation['accuracy']:.3f} "
                        f"on {evaluation['samples']} samples")

        for artifact in summary['artifacts']:
            self._print(f"│  📄 {artifact['kind']}: {artifact['path']}")

        self._print(f"│  ❌ Errors: {len(summary['errors'])}")
        for error in summary['errors']:
            self._print(f"│     {error['time']} | {error['type']}: {error['message']}")
        self._print('└' + '─' * 50)

    def get_run_data(self):
        return self.run_data

    def save_run_report(self, file_path: str):
        """Save the recorded run as JSON"""
        try:
            with open(file_path, 'w') as f:
                json.dump(self.run_data, f, indent=2, default=str)
            self._print(f'📄 Run report saved to: {file_path}')
        except OSError as e:
            self._print(f'❌ Failed to save run report: {e}')


# Global reporter instance
run_reporter = RunReporter()
