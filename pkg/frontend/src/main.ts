import { ApiClient } from './api';
import { mountExplorer } from './ui';

const base = new URLSearchParams(window.location.search).get('service') ?? '';
mountExplorer(document.getElementById('app')!, new ApiClient(base));
